total = 0
count = 0

while True:
  value = int(input("Write value, 9999 ends."))
  if value == 9999:
    break
    
  if value < 0 or value > 1000:
    print("Invalid input")
    continue

  total += value
  count += 1

if count == 0:
  print("No inputs")
else:
  print(f"Average: {total/count}")
